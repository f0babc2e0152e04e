#include "patchrl/image.hpp"

#include <algorithm>
#include <cmath>

namespace patchrl::img {

PatchMask make_mask(int origin_col, int origin_row, PatchSpec spec, int image_height,
                    int image_width) {
  if (spec.height < 1 || spec.width < 1)
    throw std::invalid_argument("make_mask: patch dims must be >= 1");
  if (origin_col < 0 || origin_row < 0 || origin_row + spec.height > image_height ||
      origin_col + spec.width > image_width)
    throw std::out_of_range("make_mask: patch rectangle exits image bounds");

  PatchMask m;
  m.origin_col = origin_col;
  m.origin_row = origin_row;
  m.spec = spec;
  m.image_height = image_height;
  m.image_width = image_width;
  m.a.assign(static_cast<std::size_t>(image_height) * image_width, 0);
  for (int r = origin_row; r < origin_row + spec.height; ++r)
    for (int c = origin_col; c < origin_col + spec.width; ++c)
      m.a[static_cast<std::size_t>(r) * image_width + c] = 1;
  return m;
}

Image paste(const Image& x, const Image& xt, const PatchMask& mask) {
  if (!x.same_dims(xt)) throw std::invalid_argument("paste: x and xt dims differ");
  if (mask.image_height != x.height || mask.image_width != x.width)
    throw std::invalid_argument("paste: mask dims do not match image");

  Image out = x;
  for (int r = mask.origin_row; r < mask.origin_row + mask.spec.height; ++r) {
    for (int c = mask.origin_col; c < mask.origin_col + mask.spec.width; ++c) {
      for (int ch = 0; ch < x.channels; ++ch) {
        const double v = xt.at(r, c, ch);
        out.at(r, c, ch) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

ValidRegion compute_valid_region(int image_height, int image_width,
                                 const std::vector<Rect>& exclusions, PatchSpec spec) {
  ValidRegion region;
  region.grid_height = image_height;
  region.grid_width = image_width;
  region.spec = spec;
  region.exclusions = exclusions;
  region.allowed.assign(static_cast<std::size_t>(image_height) * image_width, 0);

  long count = 0;
  for (int r = 0; r < image_height; ++r) {
    for (int c = 0; c < image_width; ++c) {
      if (r + spec.height > image_height || c + spec.width > image_width) continue;
      bool ok = true;
      for (const Rect& ex : exclusions) {
        if (ex.intersects(r, c, spec.height, spec.width)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        region.allowed[static_cast<std::size_t>(r) * image_width + c] = 1;
        ++count;
      }
    }
  }
  if (count == 0)
    throw EmptyRegionError("compute_valid_region: no allowed patch origin");
  return region;
}

Image resize_bilinear(const Image& src, int out_height, int out_width) {
  Image out(out_height, out_width, src.channels);
  const double sy = static_cast<double>(src.height) / out_height;
  const double sx = static_cast<double>(src.width) / out_width;
  for (int r = 0; r < out_height; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int r0 = static_cast<int>(std::floor(fy));
    const int r1 = std::min(r0 + 1, src.height - 1);
    const double wy = fy - r0;
    for (int c = 0; c < out_width; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int c0 = static_cast<int>(std::floor(fx));
      const int c1 = std::min(c0 + 1, src.width - 1);
      const double wx = fx - c0;
      for (int ch = 0; ch < src.channels; ++ch) {
        const double top = (1.0 - wx) * src.at(r0, c0, ch) + wx * src.at(r0, c1, ch);
        const double bot = (1.0 - wx) * src.at(r1, c0, ch) + wx * src.at(r1, c1, ch);
        out.at(r, c, ch) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Image smooth_patch(const Image& patch) {
  const int ph = std::max(1, patch.height / 2);
  const int pw = std::max(1, patch.width / 2);
  const int win_h = patch.height >= 2 ? 2 : 1;
  const int win_w = patch.width >= 2 ? 2 : 1;

  Image pooled(ph, pw, patch.channels);
  for (int r = 0; r < ph; ++r) {
    for (int c = 0; c < pw; ++c) {
      for (int ch = 0; ch < patch.channels; ++ch) {
        double acc = 0.0;
        for (int dr = 0; dr < win_h; ++dr)
          for (int dc = 0; dc < win_w; ++dc)
            acc += patch.at(r * win_h + dr, c * win_w + dc, ch);
        pooled.at(r, c, ch) = acc / (win_h * win_w);
      }
    }
  }
  return resize_bilinear(pooled, patch.height, patch.width);
}

Image crop(const Image& x, const PatchMask& mask) {
  Image out(mask.spec.height, mask.spec.width, x.channels);
  for (int r = 0; r < mask.spec.height; ++r)
    for (int c = 0; c < mask.spec.width; ++c)
      for (int ch = 0; ch < x.channels; ++ch)
        out.at(r, c, ch) = x.at(mask.origin_row + r, mask.origin_col + c, ch);
  return out;
}

Image uncrop(const Image& x, const Image& patch, const PatchMask& mask) {
  Image out = x;
  for (int r = 0; r < mask.spec.height; ++r)
    for (int c = 0; c < mask.spec.width; ++c)
      for (int ch = 0; ch < x.channels; ++ch)
        out.at(mask.origin_row + r, mask.origin_col + c, ch) = patch.at(r, c, ch);
  return out;
}

}  // namespace patchrl::img
