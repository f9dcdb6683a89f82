#include "regrec/region.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "regrec/error.hpp"

namespace regrec {

std::size_t GridMask::count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

bool RotatedRect::contains(const Eigen::Vector2d& p, double eps) const {
  const Eigen::Vector2d d = p - center;
  return std::abs(d.dot(axis_u)) <= half_u + eps && std::abs(d.dot(axis_v())) <= half_v + eps;
}

BBox tight_bbox(const BinaryMask& mask) {
  BBox box{mask.width(), mask.height(), 0, 0};
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x + 1);
      box.y1 = std::max(box.y1, y + 1);
    }
  }
  return box;
}

CropWindow context_crop_window(const BBox& bbox, double scale, int /*image_w*/, int /*image_h*/) {
  if (!(scale >= 1.0)) throw ValueError("context scale must be >= 1");
  const int longest = std::max(bbox.width(), bbox.height());
  // The relative slack absorbs representation error in products like 1.1 * 10.
  const double raw = scale * longest;
  int side = static_cast<int>(std::ceil(raw - 1e-9 * raw));
  side = std::max(side, longest);
  return CropWindow{bbox.x0 + bbox.x1, bbox.y0 + bbox.y1, side};
}

CropWindow full_image_window(const RasterImage& image) {
  const int side = std::max(image.width(), image.height());
  return CropWindow{image.width(), image.height(), side};
}

RasterImage resample(const RasterImage& image, double src_x, double src_y, double src_w, double src_h,
                     int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ValueError("output size must be >= 1");
  const int w = image.width();
  const int h = image.height();
  const int channels = image.channels();
  RasterImage out(out_w, out_h, channels);
  const double step_x = src_w / out_w;
  const double step_y = src_h / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double y = src_y + (oy + 0.5) * step_y;
    if (y < 0.0 || y >= h) continue;
    const double sy = y - 0.5;
    const double fy0 = std::floor(sy);
    const double fy = sy - fy0;
    const int y0 = std::clamp(static_cast<int>(fy0), 0, h - 1);
    const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      const double x = src_x + (ox + 0.5) * step_x;
      if (x < 0.0 || x >= w) continue;
      const double sx = x - 0.5;
      const double fx0 = std::floor(sx);
      const double fx = sx - fx0;
      const int x0 = std::clamp(static_cast<int>(fx0), 0, w - 1);
      const int x1 = std::clamp(static_cast<int>(fx0) + 1, 0, w - 1);
      for (int c = 0; c < channels; ++c) {
        const double top = (1.0 - fx) * image.at(x0, y0, c) + fx * image.at(x1, y0, c);
        const double bottom = (1.0 - fx) * image.at(x0, y1, c) + fx * image.at(x1, y1, c);
        out.at(ox, oy, c) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

RasterImage extract_and_resize(const RasterImage& image, const CropWindow& window, int out_side) {
  return resample(image, window.left(), window.top(), window.side, window.side, out_side, out_side);
}

namespace {

// Cell index of each pixel centre along one axis, -1 when outside the window.
// Works in doubled coordinates so the arithmetic is exact.
std::vector<int> cell_lookup(int extent, int center2, int side, int cells) {
  std::vector<int> lookup(static_cast<std::size_t>(extent), -1);
  const long long begin2 = static_cast<long long>(center2) - side;
  const long long span2 = 2LL * side;
  for (int p = 0; p < extent; ++p) {
    const long long u = 2LL * p + 1 - begin2;
    if (u >= 0 && u < span2) lookup[static_cast<std::size_t>(p)] = static_cast<int>(u * cells / span2);
  }
  return lookup;
}

}  // namespace

GridMask downsample_to_grid(const BinaryMask& mask, const CropWindow& window, int rows, int cols) {
  if (rows < 1 || cols < 1) throw ValueError("grid rows and cols must be >= 1");
  if (window.side < 1) throw ValueError("window side must be >= 1");
  GridMask grid{rows, cols, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 0)};
  const auto col_of = cell_lookup(mask.width(), window.center_x2, window.side, cols);
  const auto row_of = cell_lookup(mask.height(), window.center_y2, window.side, rows);

  double sum_x = 0.0, sum_y = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < mask.height(); ++y) {
    const int r = row_of[static_cast<std::size_t>(y)];
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      sum_x += x + 0.5;
      sum_y += y + 0.5;
      ++n;
      const int c = col_of[static_cast<std::size_t>(x)];
      if (r >= 0 && c >= 0) grid.active[static_cast<std::size_t>(r) * cols + c] = 1;
    }
  }
  if (grid.count() == 0) {
    const double cx = sum_x / static_cast<double>(n);
    const double cy = sum_y / static_cast<double>(n);
    const int c = std::clamp(static_cast<int>(std::floor((cx - window.left()) / window.side * cols)), 0, cols - 1);
    const int r = std::clamp(static_cast<int>(std::floor((cy - window.top()) / window.side * rows)), 0, rows - 1);
    grid.active[static_cast<std::size_t>(r) * cols + c] = 1;
  }
  return grid;
}

namespace {

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

}  // namespace

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> points) {
  std::sort(points.begin(), points.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() < 3) return points;

  // Andrew's monotone chain; collinear points are dropped, output is CCW.
  std::vector<Eigen::Vector2d> hull(2 * points.size());
  std::size_t k = 0;
  for (const auto& p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (auto it = points.rbegin() + 1; it != points.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  return hull;
}

RotatedRect min_area_rect(std::span<const Eigen::Vector2d> points) {
  if (points.empty()) throw InputError("min_area_rect needs at least one point");
  const auto hull = convex_hull({points.begin(), points.end()});
  const std::size_t n = hull.size();
  RotatedRect best;
  if (n == 1) {
    best.center = hull[0];
    return best;
  }
  if (n == 2) {
    const Eigen::Vector2d d = hull[1] - hull[0];
    best.center = 0.5 * (hull[0] + hull[1]);
    best.axis_u = d.normalized();
    best.half_u = 0.5 * d.norm();
    return best;
  }

  auto at = [&](std::size_t i) -> const Eigen::Vector2d& { return hull[i % n]; };
  std::size_t far = 1, hi = 1, lo = 1;
  double best_area = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d& a = at(i);
    const Eigen::Vector2d u = (at(i + 1) - a).normalized();
    const Eigen::Vector2d v(-u.y(), u.x());  // inward for a CCW hull
    if (i == 0) far = hi = 1;
    while ((at(far + 1) - a).dot(v) > (at(far) - a).dot(v)) far = (far + 1) % n;
    while (at(hi + 1).dot(u) > at(hi).dot(u)) hi = (hi + 1) % n;
    if (i == 0) lo = far;
    while (at(lo + 1).dot(u) < at(lo).dot(u)) lo = (lo + 1) % n;

    const double u_min = (at(lo) - a).dot(u);
    const double u_max = (at(hi) - a).dot(u);
    const double height = (at(far) - a).dot(v);
    const double area = (u_max - u_min) * height;
    if (area < best_area) {
      best_area = area;
      best.axis_u = u;
      best.half_u = 0.5 * (u_max - u_min);
      best.half_v = 0.5 * height;
      best.center = a + u * (0.5 * (u_min + u_max)) + v * (0.5 * height);
    }
  }
  return best;
}

namespace {

// Corners of the outermost set pixel on each row; their hull equals the hull
// of every set pixel square.
std::vector<Eigen::Vector2d> mask_outline_corners(const BinaryMask& mask) {
  std::vector<Eigen::Vector2d> corners;
  for (int y = 0; y < mask.height(); ++y) {
    int first = -1, last = -1;
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.at(x, y)) {
        if (first < 0) first = x;
        last = x;
      }
    }
    if (first < 0) continue;
    corners.emplace_back(first, y);
    corners.emplace_back(first, y + 1);
    corners.emplace_back(last + 1, y);
    corners.emplace_back(last + 1, y + 1);
  }
  return corners;
}

template <typename Inside>
BinaryMask rasterize(int width, int height, Inside inside) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width) * height, 0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      bits[static_cast<std::size_t>(y) * width + x] = inside(Eigen::Vector2d(x + 0.5, y + 0.5)) ? 1 : 0;
    }
  }
  return BinaryMask(width, height, std::move(bits));
}

}  // namespace

BinaryMask rotated_bbox_mask(const BinaryMask& mask) {
  const BBox box = tight_bbox(mask);
  const auto corners = mask_outline_corners(mask);
  const RotatedRect rect = min_area_rect(corners);
  const double aabb_area = static_cast<double>(box.width()) * box.height();
  if (rect.area() < aabb_area - 1e-9) {
    BinaryMask rotated = rasterize(mask.width(), mask.height(), [&](const Eigen::Vector2d& p) { return rect.contains(p); });
    // Pixel-centre sampling can still hand a slightly smaller rectangle more pixels.
    if (static_cast<double>(rotated.count()) <= aabb_area) return rotated;
  }
  // Axis-aligned box is (one of) the optimum; prefer it exactly.
  return rasterize(mask.width(), mask.height(), [&](const Eigen::Vector2d& p) {
    return p.x() > box.x0 && p.x() < box.x1 && p.y() > box.y0 && p.y() < box.y1;
  });
}

BinaryMask bounding_ellipse_mask(const BinaryMask& mask) {
  const BBox box = tight_bbox(mask);
  const Eigen::Vector2d center(0.5 * (box.x0 + box.x1), 0.5 * (box.y0 + box.y1));
  // Ellipse inscribed in the box, scaled by sqrt(2): passes through the box corners.
  const double a = std::sqrt(2.0) * 0.5 * box.width();
  const double b = std::sqrt(2.0) * 0.5 * box.height();
  return rasterize(mask.width(), mask.height(), [&](const Eigen::Vector2d& p) {
    const double dx = (p.x() - center.x()) / a;
    const double dy = (p.y() - center.y()) / b;
    return dx * dx + dy * dy <= 1.0 + 1e-9;
  });
}

RasterImage gaussian_blur(const RasterImage& image, double sigma) {
  if (!(sigma > 0.0)) throw ValueError("blur sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= total;

  const int w = image.width(), h = image.height(), channels = image.channels();
  std::vector<double> horizontal(image.data().size(), 0.0);
  auto idx = [&](int x, int y, int c) { return (static_cast<std::size_t>(y) * w + x) * channels + c; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int i = std::max(-radius, -x); i <= std::min(radius, w - 1 - x); ++i) {
          acc += kernel[static_cast<std::size_t>(i + radius)] * image.at(x + i, y, c);
        }
        horizontal[idx(x, y, c)] = acc;
      }
    }
  }
  RasterImage out(w, h, channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int i = std::max(-radius, -y); i <= std::min(radius, h - 1 - y); ++i) {
          acc += kernel[static_cast<std::size_t>(i + radius)] * horizontal[idx(x, y + i, c)];
        }
        out.at(x, y, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

namespace {

void check_same_shape(const RasterImage& image, const BinaryMask& mask) {
  if (image.width() != mask.width() || image.height() != mask.height()) {
    throw ShapeError("mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                     " but image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()));
  }
}

// Foreground from `image`, background from `background(x, y, c)`.
template <typename Background>
RasterImage composite(const RasterImage& image, const BinaryMask& mask, Background background) {
  RasterImage out = image;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (mask.at(x, y)) continue;
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = background(x, y, c);
    }
  }
  return out;
}

}  // namespace

RasterImage render_fore2token(const RasterImage& image, const BinaryMask& mask, const CropWindow& window,
                              int out_side) {
  check_same_shape(image, mask);
  const RasterImage filled = composite(image, mask, [](int, int, int) { return 255.0f; });
  return extract_and_resize(filled, window, out_side);
}

RasterImage render_blur2token(const RasterImage& image, const BinaryMask& mask, const CropWindow& window,
                              double sigma, int out_side) {
  check_same_shape(image, mask);
  const RasterImage blurred = gaussian_blur(image, sigma);
  const RasterImage mixed = composite(image, mask, [&](int x, int y, int c) { return blurred.at(x, y, c); });
  return extract_and_resize(mixed, window, out_side);
}

}  // namespace regrec
