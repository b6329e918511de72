#pragma once

#include <cstdint>
#include <vector>

#include "monoscene/errors.hpp"

namespace monoscene {

/// Dense binary occupancy bitmap, bit-packed per row (64 bits per word).
/// Run-length or image encodings exist only at the file boundary.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height)
      : width_(width), height_(height), stride_((width + 63) / 64),
        words_(static_cast<std::size_t>(stride_) * height, 0ull) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty_dims() const { return width_ <= 0 || height_ <= 0; }
  bool same_dims(const Mask& o) const { return width_ == o.width_ && height_ == o.height_; }

  bool get(int x, int y) const {
    return (words_[idx(y) + static_cast<std::size_t>(x >> 6)] >> (x & 63)) & 1ull;
  }
  void set(int x, int y) { words_[idx(y) + static_cast<std::size_t>(x >> 6)] |= 1ull << (x & 63); }
  void clear(int x, int y) {
    words_[idx(y) + static_cast<std::size_t>(x >> 6)] &= ~(1ull << (x & 63));
  }
  bool contains(int x, int y) const {
    return x >= 0 && x < width_ && y >= 0 && y < height_ && get(x, y);
  }

  /// Set bits [x0, x1] in row y (clamped to the row).
  void set_row_span(int y, int x0, int x1);

  std::size_t count() const;
  bool any() const;
  void clear_all();

  /// Bounding box of set bits; false when empty.
  bool bbox(int& x0, int& y0, int& x1, int& y1) const;

  Mask dilated(int radius) const;  // Euclidean disk of the given radius
  bool intersects(const Mask& o) const;
  std::size_t intersection_count(const Mask& o) const;

  /// Pixels set here whose 4-neighborhood leaves the mask (or the image).
  std::vector<std::pair<int, int>> boundary_pixels() const;

  const std::vector<std::uint64_t>& words() const { return words_; }
  int stride() const { return stride_; }

 private:
  std::size_t idx(int y) const { return static_cast<std::size_t>(y) * stride_; }

  int width_ = 0;
  int height_ = 0;
  int stride_ = 0;
  std::vector<std::uint64_t> words_;
};

/// |a AND b| / |a OR b|; an empty union is defined as 0.
double mask_iou(const Mask& a, const Mask& b);

}  // namespace monoscene
