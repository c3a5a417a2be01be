#include "lted/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "lted/errors.hpp"

namespace lted {

bool BoundingBox::valid() const noexcept {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
}

const LabeledBox* BoxSet::find(ObjectId id) const noexcept {
  auto it = std::find_if(boxes.begin(), boxes.end(),
                         [id](const LabeledBox& b) { return b.object == id; });
  return it == boxes.end() ? nullptr : &*it;
}

void validate_box(const BoundingBox& box) {
  if (!box.valid()) {
    throw InputError(fmt::format("invalid box [{}, {}, {}, {}]", box.x_min,
                                 box.y_min, box.x_max, box.y_max));
  }
}

double overlap_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double union_area(const BoundingBox& a, const BoundingBox& b) {
  return a.area() + b.area() - overlap_area(a, b);
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  validate_box(a);
  validate_box(b);
  const double inter = overlap_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double rasterize_iou(const BoundingBox& a, const BoundingBox& b,
                     double grid_step) {
  validate_box(a);
  validate_box(b);
  if (!(grid_step > 0.0) || !std::isfinite(grid_step)) {
    throw InputError(fmt::format("grid_step must be positive, got {}", grid_step));
  }
  const double x0 = std::min(a.x_min, b.x_min);
  const double y0 = std::min(a.y_min, b.y_min);
  const double x1 = std::max(a.x_max, b.x_max);
  const double y1 = std::max(a.y_max, b.y_max);
  const auto nx = static_cast<long long>(std::ceil((x1 - x0) / grid_step));
  const auto ny = static_cast<long long>(std::ceil((y1 - y0) / grid_step));

  auto inside = [](const BoundingBox& r, double x, double y) {
    return x >= r.x_min && x < r.x_max && y >= r.y_min && y < r.y_max;
  };

  long long in_both = 0;
  long long in_either = 0;
  for (long long iy = 0; iy < ny; ++iy) {
    const double y = y0 + (static_cast<double>(iy) + 0.5) * grid_step;
    for (long long ix = 0; ix < nx; ++ix) {
      const double x = x0 + (static_cast<double>(ix) + 0.5) * grid_step;
      const bool ia = inside(a, x, y);
      const bool ib = inside(b, x, y);
      in_both += (ia && ib) ? 1 : 0;
      in_either += (ia || ib) ? 1 : 0;
    }
  }
  if (in_either == 0) return 0.0;
  return static_cast<double>(in_both) / static_cast<double>(in_either);
}

double mean_iou(const BoxSet& predicted, const BoxSet& truth, MatchRule rule) {
  if (truth.empty()) {
    throw InputError("mean_iou: ground-truth set is empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.boxes.size(); ++i) {
    const LabeledBox& p = predicted.boxes[i];
    const LabeledBox* match = nullptr;
    if (rule == MatchRule::kObjectIdentity) {
      match = truth.find(p.object);
    } else if (i < truth.boxes.size()) {
      match = &truth.boxes[i];
    }
    if (match != nullptr) total += iou(p.box, match->box);
  }
  return total / static_cast<double>(truth.size());
}

}  // namespace lted
