#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace lted {

/// Axis-aligned box in real-valued pixel coordinates. Zero-area boxes are
/// valid; min > max is not.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }
  bool valid() const noexcept;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

using ObjectId = std::uint32_t;

/// A box tagged with the identity of the scene object it was derived from.
struct LabeledBox {
  ObjectId object = 0;
  BoundingBox box;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

enum class BoxRole : std::uint8_t { kDetected, kTracked, kGroundTruth };

struct BoxSet {
  BoxRole role = BoxRole::kGroundTruth;
  std::vector<LabeledBox> boxes;

  bool empty() const noexcept { return boxes.empty(); }
  std::size_t size() const noexcept { return boxes.size(); }
  const LabeledBox* find(ObjectId id) const noexcept;

  friend bool operator==(const BoxSet&, const BoxSet&) = default;
};

/// How predicted boxes are paired with ground truth.
enum class MatchRule : std::uint8_t {
  kObjectIdentity,  // pair by LabeledBox::object
  kIndex,           // pair the i-th prediction with the i-th truth box
};

/// Throws InputError unless the box is finite with min <= max.
void validate_box(const BoundingBox& box);

double overlap_area(const BoundingBox& a, const BoundingBox& b);
double union_area(const BoundingBox& a, const BoundingBox& b);

/// Intersection over union; 0 when both boxes have zero area.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Grid-counting estimate of iou(): cell centres of a regular grid of pitch
/// `grid_step` over the joint bounding region are classified as inside a∩b
/// and a∪b. Used as a test oracle.
double rasterize_iou(const BoundingBox& a, const BoundingBox& b,
                     double grid_step);

/// Sum of IoU between each prediction and its matched truth box, divided by
/// the number of truth boxes. Predictions without a counterpart contribute 0.
double mean_iou(const BoxSet& predicted, const BoxSet& truth,
                MatchRule rule = MatchRule::kObjectIdentity);

}  // namespace lted
