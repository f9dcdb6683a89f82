#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "regrec/maskio.hpp"

namespace regrec {

/// Half-open pixel box: [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool operator==(const BBox&) const = default;
};

/// Square sampling window in continuous pixel coordinates (pixel (x, y) covers
/// [x, x+1) x [y, y+1)). The centre is stored doubled so half-pixel centres are
/// exact. Samples outside the image read as zero; the window is never shifted.
struct CropWindow {
  int center_x2 = 0;
  int center_y2 = 0;
  int side = 1;

  double center_x() const { return 0.5 * center_x2; }
  double center_y() const { return 0.5 * center_y2; }
  double left() const { return 0.5 * (center_x2 - side); }
  double top() const { return 0.5 * (center_y2 - side); }
  bool operator==(const CropWindow&) const = default;
};

struct GridMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> active;  // row-major

  bool at(int r, int c) const { return active[static_cast<std::size_t>(r) * cols + c] != 0; }
  std::size_t count() const;
};

/// Minimum-area enclosing rectangle, axes `axis_u` and its left normal.
struct RotatedRect {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector2d axis_u = Eigen::Vector2d::UnitX();
  double half_u = 0.0;
  double half_v = 0.0;

  Eigen::Vector2d axis_v() const { return {-axis_u.y(), axis_u.x()}; }
  double area() const { return 4.0 * half_u * half_v; }
  bool contains(const Eigen::Vector2d& p, double eps = 1e-7) const;
};

inline constexpr double kDefaultContextScale = 2.0;
inline constexpr double kDefaultBlurSigma = 10.0;

BBox tight_bbox(const BinaryMask& mask);

/// side = ceil(scale * max(w, h)), centred on the box centre.
CropWindow context_crop_window(const BBox& bbox, double scale, int image_w, int image_h);

/// Window covering the whole image, used for the global view.
CropWindow full_image_window(const RasterImage& image);

/// Bilinear resample of an arbitrary axis-aligned source rectangle to
/// out_w x out_h, half-pixel-centre alignment. Sample points outside the image
/// read 0; inside, neighbour indices clamp to the border.
RasterImage resample(const RasterImage& image, double src_x, double src_y, double src_w, double src_h,
                     int out_w, int out_h);

RasterImage extract_and_resize(const RasterImage& image, const CropWindow& window, int out_side);

/// A cell is active iff it holds the centre of at least one set pixel. If no
/// cell qualifies, the cell containing the mask centroid (clamped) is used.
GridMask downsample_to_grid(const BinaryMask& mask, const CropWindow& window, int rows, int cols);

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> points);

/// Rotating calipers over the convex hull of `points`.
RotatedRect min_area_rect(std::span<const Eigen::Vector2d> points);

BinaryMask rotated_bbox_mask(const BinaryMask& mask);
BinaryMask bounding_ellipse_mask(const BinaryMask& mask);

/// Separable, normalized Gaussian with radius ceil(3 sigma); zero padding.
RasterImage gaussian_blur(const RasterImage& image, double sigma);

RasterImage render_fore2token(const RasterImage& image, const BinaryMask& mask, const CropWindow& window,
                              int out_side = 448);
RasterImage render_blur2token(const RasterImage& image, const BinaryMask& mask, const CropWindow& window,
                              double sigma = kDefaultBlurSigma, int out_side = 448);

}  // namespace regrec
