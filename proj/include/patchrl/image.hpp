#ifndef PATCHRL_IMAGE_HPP
#define PATCHRL_IMAGE_HPP

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace patchrl::img {

/// Dense H x W x C image with unit-interval intensities.
/// Layout is row-major with interleaved channels:
///   data[(row * width + col) * channels + ch]
///
/// Coordinate convention used across the whole project: a position is the
/// pair (col, row) = (c_x, c_y) of the patch's upper-left pixel, with the
/// origin at the image's upper-left corner.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  Eigen::ArrayXd data;

  Image() = default;
  Image(int h, int w, int c)
      : height(h), width(w), channels(c), data(Eigen::ArrayXd::Zero(h * w * c)) {
    if (h < 1 || w < 1 || c < 1) throw std::invalid_argument("Image: dims must be >= 1");
  }

  static Image constant(int h, int w, int c, double v) {
    Image im(h, w, c);
    im.data.setConstant(v);
    return im;
  }

  int size() const { return height * width * channels; }
  int index(int row, int col, int ch) const { return (row * width + col) * channels + ch; }
  double& at(int row, int col, int ch) { return data[index(row, col, ch)]; }
  double at(int row, int col, int ch) const { return data[index(row, col, ch)]; }

  bool same_dims(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  void clamp01() { data = data.cwiseMax(0.0).cwiseMin(1.0); }

  bool valid_unit_interval() const {
    return data.isFinite().all() && (data >= 0.0).all() && (data <= 1.0).all();
  }
};

/// Patch height/width in pixels.
struct PatchSpec {
  int height = 1;
  int width = 1;
};

/// Axis-aligned rectangle, used for exclusion zones. (row, col) is the
/// upper-left corner.
struct Rect {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;

  bool intersects(int r0, int c0, int h, int w) const {
    return row < r0 + h && r0 < row + height && col < c0 + w && c0 < col + width;
  }
};

/// Binary pasting mask: a rectangle of ones at `origin_*` of size `spec`
/// inside an image of `image_height` x `image_width`. The dense 0/1 grid is
/// materialized so mask consumers and tests can treat it as a plain matrix.
struct PatchMask {
  int origin_col = 0;  // c_x
  int origin_row = 0;  // c_y
  PatchSpec spec;
  int image_height = 0;
  int image_width = 0;
  std::vector<std::uint8_t> a;  // image_height * image_width entries, row-major

  bool covers(int row, int col) const {
    return a[static_cast<std::size_t>(row) * image_width + col] != 0;
  }
  long ones_count() const {
    long n = 0;
    for (auto v : a) n += v;
    return n;
  }
};

/// Grid of allowed patch origins. An origin (row, col) is allowed iff the
/// full patch rectangle stays inside the image and intersects no exclusion
/// rectangle. The grid spans every image pixel so it can be laid directly
/// over the agent's position map.
struct ValidRegion {
  int grid_height = 0;
  int grid_width = 0;
  PatchSpec spec;
  std::vector<std::uint8_t> allowed;  // grid_height * grid_width, row-major
  std::vector<Rect> exclusions;

  bool is_allowed(int row, int col) const {
    return allowed[static_cast<std::size_t>(row) * grid_width + col] != 0;
  }
  long allowed_count() const {
    long n = 0;
    for (auto v : allowed) n += v;
    return n;
  }
};

/// Raised when no patch origin is allowed (the attack cannot proceed).
struct EmptyRegionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Builds the binary mask for a patch of size `spec` whose upper-left corner
/// sits at (origin_col, origin_row). Throws std::out_of_range if the
/// rectangle does not fit into an image of the given dims.
PatchMask make_mask(int origin_col, int origin_row, PatchSpec spec, int image_height,
                    int image_width);

/// Composes x and the perturbation image: (1-A) * x + A * xt, clipped to
/// [0,1]. Pixels outside the mask are copied from x bit-for-bit.
Image paste(const Image& x, const Image& xt, const PatchMask& mask);

/// Enumerates every allowed patch origin for the given image dims and
/// exclusion rectangles. Throws EmptyRegionError when nothing is allowed.
ValidRegion compute_valid_region(int image_height, int image_width,
                                 const std::vector<Rect>& exclusions, PatchSpec spec);

/// Physical-smoothing transform: average-pool the patch down by a factor of
/// two (floor dims), then bilinearly upscale back to the original size
/// (align-corners-false convention).
Image smooth_patch(const Image& patch);

/// Bilinear resize with the align-corners-false convention, per channel.
Image resize_bilinear(const Image& src, int out_height, int out_width);

/// Extracts the patch rectangle of `mask` from `x` as a standalone image.
Image crop(const Image& x, const PatchMask& mask);

/// Writes `patch` into the mask rectangle of a copy of `x` (no blending,
/// no clipping); inverse of crop for in-bounds patches.
Image uncrop(const Image& x, const Image& patch, const PatchMask& mask);

}  // namespace patchrl::img

#endif  // PATCHRL_IMAGE_HPP
